from setuptools import setup

setup(name='mccsr',
      version='1.0.0',
      description='Color image super-resolution with cross-channel sparse coding',
      url='https://whatever.org/',
      author='<FILL_IN_YOUR_FULL_NAME>',
      author_email='<FILL_IN_YOUR_EMAIL>',
      packages=['mccsr', 'mccsr.core'],
      install_requires=[
          'numpy',
          'scipy',
          'Pillow',
          'scikit-image',
          'docopt',
          'environs',
          'marshmallow',
          'python-dotenv',
      ],
      entry_points={
          'console_scripts': ['mccsr=mccsr.app_cli:main'],
      },
      include_package_data=True,
      zip_safe=False)
