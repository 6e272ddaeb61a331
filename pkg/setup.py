from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the numpy
# implementations in aublend._kernels_py when the extension is absent.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "aublend._kernels",
                ["src/aublend/_kernels.pyx"],
                # -ffp-contract=off: no fused multiply-add, so the compiled
                # compose path rounds exactly like the numpy fallback.
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
