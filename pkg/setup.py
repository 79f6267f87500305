from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="pyslvm",
    version="0.0.1",
    description="Few-shot semantic segmentation with prompt learning on frozen vision models",
    long_description=long_description,
    long_description_content_type="text/markdown",
    classifiers=[
        "Programming Language :: Python :: 3",
        "Operating System :: OS Independent",
    ],
    packages=find_packages('.', exclude=('tests', 'tests.*')),
    install_requires=[
        'numpy',
        'tensorflow>=2.11,<2.16',
        'tqdm',
        'gin-config',
        'Pillow',
    ],
    extras_require={
        'test': ['pytest', 'hypothesis'],
    },
    entry_points={
        'console_scripts': ['slvm=pyslvm.cli:main'],
    },
    python_requires=">=3.8",
)
