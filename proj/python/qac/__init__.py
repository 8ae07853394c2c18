"""Actor-critic trainer with a shared prediction/training service.

The heavy lifting lives in the compiled extension; this package re-exports
it. Training entry points (`run`, `train_sync`) release the GIL, so python
callers can watch metrics files from another thread while a run is going.
"""

from ._qac import *  # noqa: F401,F403

__version__ = "0.1.0"
