from setuptools import find_packages, setup

from maskcount import __version__

with open("requirements.txt") as fd:
    install_requires = [line.strip() for line in fd if line.strip() and line.strip() != "pytest"]

setup(
    name="maskcount",
    version=__version__,
    description="Exemplar-based object counting in multi-class scenes with pseudo masks",
    packages=find_packages(exclude=["tests"]),
    python_requires=">=3.8",
    install_requires=install_requires,
    extras_require={"tests": ["pytest"]},
    entry_points={"console_scripts": ["maskcount=maskcount.cli:main"]},
)
