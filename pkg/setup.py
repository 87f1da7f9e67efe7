from setuptools import setup
from codecs import open  # To use a consistent encoding
from os import path


here = path.abspath(path.dirname(__file__))


# Get the long description from the README file
with open(path.join(here, 'README.rst'), encoding='utf-8') as f:
    long_description = f.read()

# Get content from __about__.py
about = {}
with open(path.join(here, 'vcam', '__about__.py'), 'r', 'utf-8') as f:
    exec(f.read(), about)


setup(
    name='vcam',

    # Versions should comply with PEP440.  For a discussion on single-sourcing
    # the version across setup.py and the project code, see
    # https://packaging.python.org/en/latest/single_source_version.html
    version=about['__version__'],

    description='Spline estimation and structure identification for locally '
                'stationary varying-coefficient additive models.',
    long_description=long_description,

    license='Apache 2.0',
    classifiers=[
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: Apache Software License',
        'Operating System :: OS Independent',
        'Programming Language :: Python',
        'Programming Language :: Python :: 3.11',
        'Topic :: Scientific/Engineering :: Mathematics',
    ],
    python_requires='>=3.11',
    install_requires=[
        'numpy>=1.24,<3.0',
        'scipy>=1.10,<2.0',
        'pandas>=2.0,<3.0',
    ],

    packages=[
        'vcam',
        'vcam.nonblocking',
        'vcam.conf',
    ],
    entry_points={
        'console_scripts': [
            'vcam=vcam.cli:main',
        ],
    },
)
