# SPDX-License-Identifier: MIT

import os
import os.path

import nox


nox.options.sessions = ['mypy', 'test']
nox.options.reuse_existing_virtualenvs = True


@nox.session(python='3.9')
def mypy(session):
    session.install('.', 'mypy', 'numpy', 'typing_extensions')

    session.run('mypy', '-p', 'bidan')


@nox.session(python=['3.9', '3.10', '3.11', '3.12'])
def test(session):
    htmlcov_output = os.path.join(session.virtualenv.location, 'htmlcov')
    xmlcov_output = os.path.join(session.virtualenv.location, f'coverage-{session.python}.xml')

    session.install('.[test]')

    session.run(
        'pytest',
        '--cov',
        f'--cov-report=html:{htmlcov_output}',
        f'--cov-report=xml:{xmlcov_output}',
        'tests/',
        *session.posargs,
    )


@nox.session(python='3.11')
def slow(session):
    session.install('.[test]')

    session.run('pytest', '--run-slow', '-m', 'slow', 'tests/', *session.posargs)


@nox.session
def docs(session):
    session.install('.[docs]')

    session.run('sphinx-build', '-W', '-b', 'html', 'docs', os.path.join('docs', '_build'))
