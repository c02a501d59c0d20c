from setuptools import setup, find_packages

with open('requirements.txt') as f:
    reqs = f.read().splitlines()

setup(
    name='cia_ids',
    packages=find_packages(exclude=['tests', 'tests.*']),
    package_data={'cia_ids': ['data/*.yaml']},
    version='1.0.0',
    description='Intrusion detection with CIA domain knowledge infused features and explanations.',
    license='Apache License 2.0',
    python_requires='>=3.9',
    install_requires=reqs,
    extras_require={'tests': ['pytest>=7.0']},
    entry_points={'console_scripts': ['cia-ids=cia_ids.manager:main']})
