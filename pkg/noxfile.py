import nox
from pathlib import Path


nox.options.default_venv_backend = "uv|virtualenv"
nox.options.reuse_existing_virtualenvs = True
nox.options.sessions = ["unit"]

homedir = Path(__file__).parent.resolve()
RYDBERGFDM_ENV = {
    "PYTHONIOENCODING": "utf-8",
    "RYDBERGFDM_CONFIG_DIR": f"{homedir}/configs",
    # one BLAS thread per worker so --jobs scales and timings are stable
    "OMP_NUM_THREADS": "1",
    "OPENBLAS_NUM_THREADS": "1",
}


def set_environment_variables(env_dict, session):
    """
    Sets environment variables for a nox Session object.

    Parameters
    -----------
        session : nox.Session
            The session to set the environment variables for.
        env_dict : dict
            A dictionary of environment variable names and values.

    """
    for key, value in env_dict.items():
        session.env[key] = value


_pyproject = nox.project.load_toml("pyproject.toml")
BUILD_DEPS = tuple(_pyproject["build-system"]["requires"])


def editable_install(session, *extras):
    """Install rydbergfdm in editable mode without build isolation."""
    session.install(*BUILD_DEPS, silent=False)
    target = "." if not extras else f".[{','.join(extras)}]"
    session.install("-e", target, "--no-build-isolation", silent=False)


@nox.session(name="unit")
def run_unit(session):
    """Run the fast unit tests."""
    set_environment_variables(RYDBERGFDM_ENV, session=session)
    editable_install(session, "dev")
    session.run("pytest", "tests", "-m", "unit", *session.posargs)


@nox.session(name="coverage")
def run_coverage(session):
    """Run unit and integration tests with coverage reporting."""
    set_environment_variables(RYDBERGFDM_ENV, session=session)
    editable_install(session, "dev")
    session.run(
        "pytest",
        "tests",
        "-m",
        "unit or integration",
        "--cov=rydbergfdm",
        "--cov-report=html",
        "--cov-report=term-missing",
        *session.posargs,
    )


@nox.session(name="integration")
def run_integration(session):
    """Run integration tests: time-integration oracle and the CLI pipeline."""
    set_environment_variables(RYDBERGFDM_ENV, session=session)
    editable_install(session, "dev")
    session.run("pytest", "tests", "-m", "integration", *session.posargs)


@nox.session(name="acceptance")
def run_acceptance(session):
    """Run the full-size reproduction runs (tens of minutes).

    Usage:
        nox -s acceptance                  # every profile
        nox -s acceptance -- -k fig2       # one profile
        RYDBERGFDM_JOBS=8 nox -s acceptance
    """
    set_environment_variables(RYDBERGFDM_ENV, session=session)
    editable_install(session, "dev")
    session.run("pytest", "tests/acceptance", "-m", "acceptance", *session.posargs)


@nox.session(name="benchmarks")
def run_benchmarks(session):
    """Time network inference against the curve-fitting baseline.

    Results are written to ``BENCHMARK_OUTPUT`` (default ``performance_results.json``).
    """
    set_environment_variables(RYDBERGFDM_ENV, session=session)
    editable_install(session, "dev")
    session.run("pytest", "tests/benchmarks", "-m", "benchmark", *session.posargs)


@nox.session(name="dev", venv_backend="none")
def run_dev(session):
    """Editable install into the active environment, for iterative work."""
    session.run("python", "-m", "pip", "install", *BUILD_DEPS, external=True)
    session.run("python", "-m", "pip", "install", "-e", ".[dev]", "--no-build-isolation", external=True)
