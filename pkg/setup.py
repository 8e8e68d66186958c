from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; dgc falls back to the numpy kernel
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("dgc._lemke_ext", ["src/dgc/_lemke_ext.pyx"], optional=True,
                   extra_compile_args=["-O3"])],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
