"""
Django settings for the sgplab project.

The project is a command-line toolkit: there is no web surface, no database and
no static files. Django supplies the management-command CLI, the test runner
and the settings layer; everything tunable is read from the environment with
python-decouple so experiments are reproducible from a `.env` file.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""
import os
from decouple import config, Choices
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is signed or served.
SECRET_KEY = config('SECRET_KEY', default='sgplab-local-development-key')
DEBUG = config('DEBUG', default=False, cast=bool)
ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'tensorcore',
    'nn',
    'pyramid',
    'attacks',
    'evalharness',
    'data',
    'cli',
]

# Experiments persist to files (model containers, archives, CSV reports),
# never to a database.
DATABASES = {}

TIME_ZONE = 'UTC'

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Django REST Framework
# Serializers validate configs and report rows at the CLI boundary only.
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': [],
    'DEFAULT_PERMISSION_CLASSES': [],
    'UNAUTHENTICATED_USER': None,
}


# Experiment defaults
SGP_MASTER_SEED = config('SGP_MASTER_SEED', default=0, cast=int)
SGP_THREADS = config('SGP_THREADS', default=0, cast=int) or (os.cpu_count() or 1)
SGP_IMAGE_SIZE = config('SGP_IMAGE_SIZE', default=32, cast=int)
SGP_NUM_CLASSES = config('SGP_NUM_CLASSES', default=4, cast=int)
SGP_MIN_PYRAMID_SIZE = config('SGP_MIN_PYRAMID_SIZE', default=8, cast=int)
SGP_RESIZE_MODE = config(
    'SGP_RESIZE_MODE', default='bilinear', cast=Choices(['bilinear', 'nearest'])
)

# Seeded regression benchmarks take minutes; opt in explicitly.
SGP_RUN_BENCHMARKS = config('SGP_RUN_BENCHMARKS', default=False, cast=bool)


# Logging
SGP_LOG_LEVEL = config('SGP_LOG_LEVEL', default='INFO')

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': SGP_LOG_LEVEL,
    },
}
