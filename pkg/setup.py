import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

setuptools.setup(
    name="mobipower",
    version="0.1.0",
    author="Mobipower Developers",
    description=(
        "Multi-agent deep reinforcement learning power control "
        "for mobile cellular downlinks"
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=["mobipower"],
    install_requires=["numpy>=1.24", "scipy>=1.10"],
    entry_points={"console_scripts": ["mobipower=mobipower.cli:main"]},
    classifiers=[
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering",
    ],
    python_requires=">=3.10",
)
