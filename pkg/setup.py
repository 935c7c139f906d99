"""
ilradmm setup file
====================================
Setup file specifying the python version and so forth.

..
    Copyright 2022, The ilradmm developers.

    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        http://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.

"""

from setuptools import setup, find_packages

from ilradmm import __version__ as _VERSION

with open('README.rst') as _f:
    _README = _f.read()

setup(
    name='ilradmm',
    version=_VERSION,
    description='Iteratively linearized reweighted ADMM for nonconvex, nonsmooth composite penalties, '
                'with the direct and in-loop ADMM baselines, convergence diagnostics and an image deblurring testbed.',
    long_description=_README,
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Education",
        "Intended Audience :: Science/Research",
        'License :: OSI Approved :: Apache Software License',
        "Natural Language :: English",
        "Operating System :: OS Independent",
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Programming Language :: Python :: 3.11',
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Image Processing",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Software Development :: Libraries :: Python Modules",
        "Typing :: Typed"
    ],
    packages=find_packages(include=['ilradmm*']),
    test_suite="testing_ilradmm",
    setup_requires=["pytest-runner"],
    install_requires=[
        'numpy>=1.21.0',
        'scipy>=1.12.0',
        'joblib>=0.13.2',
        'pandas>=1.5.0',
    ],
    tests_require=[
        "pytest",
        "pytest-cov",
        "pytest-timeout>=2.1.0",
        "pytest-xdist",
    ],
    entry_points={
        'console_scripts': [
            'ilradmm=ilradmm.experiments.cli:main',
        ],
    },
    include_package_data=True,
    license='Apache 2.0',
    keywords='admm nonconvex optimization reweighting proximal total variation deblurring scipy numpy pandas'
)
