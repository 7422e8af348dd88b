from setuptools import setup, find_packages

# This directory
from motiontools import __version__

with open("requirements.txt") as requirements_file:
    requirements = requirements_file.read()


setup(
    name='motiontools',
    version=__version__,
    packages=find_packages(),
    license='BSD3',
    description='Unsupervised optical flow estimation (MotionNet) on a small numpy autodiff engine.',
    long_description="""
    MotionNet: a fully convolutional encoder-decoder which estimates optical flow between consecutive
    frames, trained without ground truth by image reconstruction, smoothness and SSIM losses.
    Includes a synthetic data generator with exact ground truth, Middlebury .flo I/O, EPE/Fl metrics,
    a temporal classifier head stacked on the flow and a command line interface.
    """,
    install_requires=requirements,
    entry_points={
        'console_scripts': ['motiontools=motiontools.cli:main']},
)
