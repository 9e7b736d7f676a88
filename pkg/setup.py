"""Setup script for semsam-bench."""

from setuptools import setup, find_packages
from pathlib import Path

# Read the README file
readme_file = Path(__file__).parent / "README.md"
long_description = readme_file.read_text(encoding="utf-8") if readme_file.exists() else ""

# Read requirements
requirements_file = Path(__file__).parent / "requirements.txt"
if requirements_file.exists():
    requirements = requirements_file.read_text(encoding="utf-8").strip().split("\n")
    requirements = [req.strip() for req in requirements
                    if req.strip() and not req.startswith("#") and not req.startswith("pytest")]
else:
    requirements = [
        "numpy>=1.22",
        "scipy>=1.8",
        "nibabel>=4.0",
        "Pillow>=9.0",
        "pyyaml>=6.0",
        "aiohttp>=3.8.0",
        "tomli>=2.0; python_version < '3.11'",
    ]

setup(
    name="semsam-bench",
    version="0.1.0",
    description="Semantic-neighborhood decoding server and a 3D spatial-reasoning benchmark for medical volumes",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=["tests", "tests.*", "tools"]),
    include_package_data=True,
    package_data={"semsam_bench": ["data/*.yaml"]},
    install_requires=requirements,
    extras_require={
        "dev": [
            "pytest>=7.0.0",
            "pytest-asyncio>=0.21.0",
            "pytest-cov>=4.0.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "semsam-bench=semsam_bench.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Medical Science Apps.",
    ],
    python_requires=">=3.9",
    keywords="decoding nucleus-sampling embeddings benchmark medical-imaging nifti spatial-reasoning",
)
