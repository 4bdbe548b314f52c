import numba

# Workaround: https://github.com/numba/numba/issues/3341
numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
