"""Birthday-collision kernel: compiled when available, pure Python otherwise.

Set ``NATLAB_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from natlab._kernels import _birthday_py

if os.environ.get("NATLAB_PURE_PYTHON"):
    _impl = _birthday_py
    COMPILED = False
else:
    try:
        from natlab._kernels import _birthday as _impl  # type: ignore[attr-defined]
        COMPILED = True
    except ImportError:
        _impl = _birthday_py
        COMPILED = False

birthday_trial = _impl.birthday_trial
birthday_trials = _impl.birthday_trials
trial_seed = _birthday_py.trial_seed
BACKEND = "cython" if COMPILED else "python"

__all__ = ["birthday_trial", "birthday_trials", "trial_seed", "COMPILED", "BACKEND"]
