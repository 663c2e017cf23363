__version__ = "0.1.0"

# Library modules; the command line lives in ogfmap.cli
from . import baseline, cloud3d, config, covariance, ep, files, grid, kernel, ogf, sim2d, stats, utils  # noqa: E402

__all__ = ['baseline', 'cloud3d', 'config', 'covariance', 'ep', 'files', 'grid', 'kernel', 'ogf',
           'sim2d', 'stats', 'utils']
