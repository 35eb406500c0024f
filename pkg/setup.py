from setuptools import setup, find_packages

setup(
  name = 'pie-synthesis-pytorch',
  packages = find_packages(exclude=['tests']),
  version = '0.1.0',
  license='MIT',
  description = 'PIE stability analysis and H-infinity synthesis - Pytorch',
  author = 'Fabien Campagne',
  author_email = 'fac2003@gmail.com',
  keywords = [
    'control theory',
    'partial differential equations',
    'linear matrix inequalities',
    'semidefinite programming'
  ],
  install_requires=[
    'einops>=0.3',
    'numpy>=1.20',
    'torch>=1.13'
  ],
  entry_points={
    'console_scripts': ['pie-synthesis=pie_pytorch.cli:main'],
  },
  classifiers=[
    'Development Status :: 3 - Alpha',
    'Intended Audience :: Science/Research',
    'Topic :: Scientific/Engineering :: Mathematics',
    'License :: OSI Approved :: MIT License',
    'Programming Language :: Python :: 3.8',
  ],
)
