"""Build the optional compiled grid kernels.

The package works without them (a numpy fallback is selected at import),
so a failed build only costs speed.
"""

import os
import subprocess
import sys
import tempfile

from setuptools import Extension, setup


def _openmp_flags():
    if os.environ.get("DVHSMOOTH_NO_OPENMP") or sys.platform == "win32":
        return [], []
    cc = os.environ.get("CC", "cc")
    with tempfile.TemporaryDirectory() as tmp:
        src = os.path.join(tmp, "t.c")
        with open(src, "w") as fh:
            fh.write("#include <omp.h>\nint main(void){return omp_get_max_threads() < 1;}\n")
        try:
            ok = subprocess.run(
                [cc, "-fopenmp", src, "-o", os.path.join(tmp, "t")],
                capture_output=True,
            ).returncode == 0
        except OSError:
            ok = False
    return (["-fopenmp"], ["-fopenmp"]) if ok else ([], [])


def _extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    compile_args, link_args = _openmp_flags()
    ext = Extension(
        "dvhsmooth._kernels",
        ["src/dvhsmooth/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math: the kernels rely on IEEE semantics for reproducibility
        extra_compile_args=["-O2"] + compile_args,
        extra_link_args=link_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=_extensions())
