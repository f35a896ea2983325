"""
Django settings for the kamtoolkit project.

The toolkit is a command-line numerical package; Django provides the
settings layer, logging configuration, management commands and the test
runner. There is no database and no HTTP surface.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/4.2/ref/settings/
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config("SECRET_KEY", default="kamtoolkit-local-only-not-a-secret")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Third party apps
    "rest_framework",
    # Local apps
    "aubry",
]

# No persistence: results are written as CSV/JSON artifacts.
DATABASES = {}

REST_FRAMEWORK = {
    "UNAUTHENTICATED_USER": None,
    "DEFAULT_AUTHENTICATION_CLASSES": [],
    "DEFAULT_PERMISSION_CLASSES": [],
}

# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Toolkit configuration
TOOLKIT = {
    "THREADS": config("TOOLKIT_THREADS", default=1, cast=int),
    "SEED": config("TOOLKIT_SEED", default=20240611, cast=int),
    "OUTPUT_DIR": config("TOOLKIT_OUTPUT_DIR", default="kam-output"),
    "LOG_LEVEL": config("TOOLKIT_LOG_LEVEL", default="WARNING"),
}

# Logging: diagnostics go to stderr, stdout is reserved for RunSummary JSON.
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{levelname} {asctime} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "aubry": {
            "handlers": ["console"],
            "level": TOOLKIT["LOG_LEVEL"],
            "propagate": False,
        },
    },
}
