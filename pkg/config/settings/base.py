from pathlib import Path
import os

BASE_DIR = Path(__file__).resolve().parent.parent.parent

SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "dev-insecure-key")
DEBUG = os.getenv("DJANGO_DEBUG", "True").lower() == "true"

# Batch tool: no web surface is served, hosts only matter for `check`.
ALLOWED_HOSTS = ["localhost", "127.0.0.1", "[::1]"]

INSTALLED_APPS = [
    "django.contrib.contenttypes",

    "rest_framework",

    "apps.common",
    "apps.crowd",
    "apps.balancing",
    "apps.experiments",
]

DATABASES = {
    "default": {
        "ENGINE": "django.db.backends.sqlite3",
        "NAME": os.getenv("CROWDCHARGE_DB", str(BASE_DIR / "db.sqlite3")),
    }
}
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

LANGUAGE_CODE = "en-us"
TIME_ZONE = "UTC"
USE_I18N = False
USE_TZ = True


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name, "").strip()
    return float(raw) if raw else default


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    return int(raw) if raw else default


# Simulation defaults. Every key can be overridden with CROWDCHARGE_<KEY>.
CROWDCHARGE = {
    "users": _env_int("CROWDCHARGE_USERS", 100),
    "locations": _env_int("CROWDCHARGE_LOCATIONS", 5),
    "beta": _env_float("CROWDCHARGE_BETA", 0.2),
    "alpha": _env_float("CROWDCHARGE_ALPHA", 0.5),
    "delta_t": _env_float("CROWDCHARGE_DELTA_T", 40.0),
    "iterations": _env_int("CROWDCHARGE_ITERATIONS", 30),
    "reps": _env_int("CROWDCHARGE_REPS", 50),
    "e_max": _env_float("CROWDCHARGE_E_MAX", 100.0),
    "w_l": _env_float("CROWDCHARGE_WL", 0.33),
    "w_s": _env_float("CROWDCHARGE_WS", 0.33),
    "w_e": _env_float("CROWDCHARGE_WE", 0.33),
    "k": _env_int("CROWDCHARGE_K", 2),
    "t_min": _env_float("CROWDCHARGE_T_MIN", 1.0),
    "eps_balance": _env_float("CROWDCHARGE_EPS_BALANCE", 0.5),
    "social_p": _env_float("CROWDCHARGE_SOCIAL_P", 0.1),
    "seed": _env_int("CROWDCHARGE_DEFAULT_SEED", 42),
    "methods": ["mosaba", "mobiweb", "pgo", "pft"],
    "output": os.getenv("CROWDCHARGE_OUTPUT", "results/crowdcharge.csv"),
    "suite_dir": os.getenv("CROWDCHARGE_SUITE_DIR", "results/suite"),
    "jobs": _env_int("CROWDCHARGE_JOBS", 1),
}

LOG_LEVEL = os.getenv("CROWDCHARGE_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {"class": "logging.StreamHandler", "formatter": "simple"},
    },
    "loggers": {
        "apps": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
    },
}
