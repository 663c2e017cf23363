import sys

from ogfmap.cli import main

sys.exit(main())
