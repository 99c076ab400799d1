from setuptools import setup, find_packages

setup(
    name="ThermoForge",
    version="1.0",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    py_modules=["TFPipeline"],
    install_requires=["numpy>=1.23.2", "scipy>=1.9", "click>=8.0.1", "tomli>=2.0"],
    entry_points={"console_scripts": ["thermoforge=cli.TFCommands:main"]},
)
