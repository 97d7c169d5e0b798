from setuptools import find_packages, setup

setup(
    name="tools-georef",
    version="0.1.0",
    description="GNSS refinement against geospatial models and spline pose graphs",
    author="Javicle",
    author_email="qubackx@gmail.com",
    packages=find_packages(exclude=["tools_georef.tests"]),
    package_data={"tools_georef": ["py.typed"]},
    include_package_data=True,
    install_requires=[
        "numpy",
        "scipy",
        "lxml",
        "pydantic",
        "pydantic-settings",
        "python-dotenv",
        "setuptools",
        "rich",
        "tomli; python_version < '3.11'",
    ],
    extras_require={
        "tests": [
            "pytest",
        ]
    },
    entry_points={"console_scripts": ["georef=tools_georef.cli:main"]},
)
