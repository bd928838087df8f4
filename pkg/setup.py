from setuptools import setup, find_packages

setup(
    name="hetv2v",
    version="0.1.0",
    packages=find_packages(exclude=["tests", "tests.*", "examples", "examples.*"]),
    install_requires=[
        'numpy>=1.21.0',
        'scipy>=1.7.0',
        'pandas>=1.3.0',
        'scikit-learn>=1.0.0',
        'pyyaml>=6.0',
        'tqdm>=4.65.0'
    ],
    entry_points={
        'console_scripts': [
            'hetv2v=hetv2v.cli:main',
        ],
    },
    description="Heterogeneous multi-RAT V2V simulator with context-aware RAT selection",
    keywords="v2v vanet multi-rat simulation rat-selection",
    python_requires=">=3.9",
)
