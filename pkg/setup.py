from setuptools import setup


def readme():
    with open("README.rst") as readme_file:
        return readme_file.read()


configuration = {
    "name": "video2plan",
    "version": "0.1.0",
    "description": "Action trees and multi-agent plans from cooking-video detections",
    "long_description": readme(),
    "classifiers": [
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Developers",
        "License :: OSI Approved",
        "Programming Language :: Python",
        "Topic :: Software Development",
        "Topic :: Scientific/Engineering",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Operating System :: Microsoft :: Windows",
        "Operating System :: POSIX",
        "Operating System :: Unix",
        "Operating System :: MacOS",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
    ],
    "keywords": "action recognition, context free grammar, task planning, robotics",
    "license": "BSD",
    "packages": ["video2plan", "video2plan.tests"],
    "package_data": {"video2plan": ["data/*.json"]},
    "entry_points": {"console_scripts": ["video2plan = video2plan.cli:main"]},
    "python_requires": ">=3.7",
    "install_requires": [
        "numpy >= 1.17",
        "scikit-learn >= 0.18",
        "scipy >= 1.0",
        "numba >= 0.51.2",
        "llvmlite >= 0.30",
        "joblib >= 0.11",
        "nltk >= 3.5",
        "networkx >= 2.4",
        "pydot >= 1.4",
        "pandas >= 1.0",
    ],
    "ext_modules": [],
    "cmdclass": {},
    "tests_require": ["pytest"],
    "data_files": (),
    "zip_safe": False,
}

setup(**configuration)
