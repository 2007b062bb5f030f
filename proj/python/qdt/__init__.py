"""Offline RL toys: conservative Q-learning, return-to-go relabelling, and a
small decision transformer, backed by a C++ core."""

try:
    from qdt._qdt import *  # noqa: F401,F403
    from qdt._qdt import __version__  # noqa: F401
except ImportError:  # in-tree builds put _qdt on sys.path directly
    from _qdt import *  # noqa: F401,F403
    from _qdt import __version__  # noqa: F401
