"""Backend switch for the hot kernels.

Numba is used when importable unless ``MCMWC_NUMBA=0`` is set in the
environment, in which case every kernel resolves to its numpy twin.
"""
import os

_flag = os.environ.get("MCMWC_NUMBA", "1").strip().lower()
WANT_NUMBA = _flag not in ("0", "false", "no", "off")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = WANT_NUMBA and HAVE_NUMBA
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """Compile ``fn`` with numba in nopython mode (cached), or return None."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(fn)


def pick(nb_impl, np_impl):
    return nb_impl if (USE_NUMBA and nb_impl is not None) else np_impl
