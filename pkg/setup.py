from Cython.Build import cythonize
from setuptools import Extension, setup

exts = [
    Extension(
        "pedmotion._ext.gru_kernels",
        sources=["src/pedmotion/_ext/gru_kernels.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(exts, language_level=3))
