import os
import subprocess
import sys

from lpgstar import _core


def _backend_in_subprocess(value):
    env = dict(os.environ, LPGSTAR_BACKEND=value)
    res = subprocess.run([sys.executable, "-c", "from lpgstar import _core; print(_core.BACKEND)"],
                         capture_output=True, text=True, env=env)
    return res.returncode, res.stdout.strip()


def test_default_backend_is_known():
    assert _core.BACKEND in _core.BACKENDS
    assert "numpy" in _core.BACKENDS


def test_forced_fallback():
    assert _backend_in_subprocess("numpy") == (0, "numpy")
    assert _backend_in_subprocess("python") == (0, "numpy")


def test_unknown_backend_fails_at_import():
    code, _ = _backend_in_subprocess("fortran")
    assert code != 0
