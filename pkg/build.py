from Cython.Build import cythonize

compiler_directives = {"language_level": 3, "embedsignature": True}


def build(setup_kwargs):
    setup_kwargs.update(
        {
            "name": "pulmcal",
            "package": ["pulmcal"],
            # https://cython.readthedocs.io/en/latest/src/userguide/source_files_and_compilation.html#cythonize-arguments
            "ext_modules": cythonize(
                "pulmcal/_lax_wendroff_fast.pyx", compiler_directives=compiler_directives
            ),
        }
    )
