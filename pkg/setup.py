# To use a consistent encoding
from codecs import open
from os import path

from setuptools import find_packages, setup

here = path.abspath(path.dirname(__file__))

# Get the long description from the README file
with open(path.join(here, "README.md"), encoding="utf-8") as f:
    long_description = f.read()

setup(
    name="tbn",
    version="0.1",
    description="Two-bit networks: filters with weights in {-2, -1, 1, 2} and one scale each.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Environment :: Console",
    ],
    python_requires=">=3.8",
    keywords=["neural networks", "quantization", "compression", "two-bit weights"],
    packages=find_packages(exclude=["test", "test.*"]),
    install_requires=["PyYAML", "numpy", "pandas", "joblib"],
    entry_points={"console_scripts": ["tbn=tbn.cli:main"]},
)
