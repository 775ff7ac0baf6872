from setuptools import setup, find_packages

setup(
    name="boundary-control-lab",
    version="0.1.0",
    description="Wave solves, boundary control from source-to-solution data and potential reconstruction",
    author="Surya B",
    author_email="myselfsuryaaz@gmail.com",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.24.3",
        "scipy>=1.12",
        "matplotlib>=3.8.0",
        "pandas>=2.1.0",
        "sympy>=1.12",
    ],
    entry_points={
        "console_scripts": [
            "bclab=frontend.main:main",
        ],
    },
)
