"""
Django settings for the rssdsim project.

The simulator has no web surface: Django provides the ORM for the vault
index, the management commands and the test runner. Every RSSD_* value can
be overridden from the environment or a .env file.
"""

import os
from pathlib import Path

import dj_database_url
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# required by Django; nothing in the simulator signs cookies or tokens
SECRET_KEY = config('DJANGO_SECRET_KEY', default='rssdsim')


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'rssd',
]


# Database
# Use DATABASE_URL env var for a shared vault index (PostgreSQL), fall back to SQLite

DATABASE_URL = os.environ.get('DATABASE_URL', '')
if DATABASE_URL:
    DATABASES = {
        'default': dj_database_url.parse(DATABASE_URL)
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': BASE_DIR / 'db.sqlite3',
            'OPTIONS': {'timeout': 30},
            # file-backed so vault server threads see the test rows
            'TEST': {'NAME': BASE_DIR / 'test_db.sqlite3'},
        }
    }

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

TIME_ZONE = 'UTC'
USE_TZ = True


# Simulated device

RSSD_GEOMETRY = config('RSSD_GEOMETRY', default='2,2,128,64,4096')
RSSD_OVER_PROVISIONING = config('RSSD_OVER_PROVISIONING', default=0.25, cast=float)
RSSD_GC_HIGH_WATERMARK = config('RSSD_GC_HIGH_WATERMARK', default=0.20, cast=float)
RSSD_OFFLOAD_WATERMARK = config('RSSD_OFFLOAD_WATERMARK', default=0.30, cast=float)
RSSD_SEAL_MAX_ENTRIES = config('RSSD_SEAL_MAX_ENTRIES', default=1024, cast=int)
RSSD_SEAL_MAX_AGE_S = config('RSSD_SEAL_MAX_AGE_S', default=300, cast=int)
RSSD_SEGMENT_MAX_PAGES = config('RSSD_SEGMENT_MAX_PAGES', default=256, cast=int)
RSSD_COMPRESSION = config('RSSD_COMPRESSION', default='zlib')
RSSD_DEVICE_KEY = config('RSSD_DEVICE_KEY', default='')

# Vault

RSSD_VAULT_MODE = config('RSSD_VAULT_MODE', default='local')
RSSD_VAULT_HOST = config('RSSD_VAULT_HOST', default='127.0.0.1')
RSSD_VAULT_PORT = config('RSSD_VAULT_PORT', default=7878, cast=int)
# empty: simulate/attack/retention keep an in-process vault under their run directory
RSSD_VAULT_ROOT = config('RSSD_VAULT_ROOT', default='')
RSSD_VAULT_TIMEOUT_S = config('RSSD_VAULT_TIMEOUT_S', default=5.0, cast=float)

# Detection hooks

RSSD_DETECTOR_BURST_THRESHOLD = config('RSSD_DETECTOR_BURST_THRESHOLD', default=32, cast=int)
RSSD_DETECTOR_TRIM_THRESHOLD = config('RSSD_DETECTOR_TRIM_THRESHOLD', default=8, cast=int)
RSSD_DETECTOR_WINDOW_S = config('RSSD_DETECTOR_WINDOW_S', default=10, cast=int)

# Runs

RSSD_OUTPUT_DIR = config('RSSD_OUTPUT_DIR', default=str(BASE_DIR / 'runs'))
RSSD_SEED = config('RSSD_SEED', default=1, cast=int)
RSSD_WEAR_BOUND = config('RSSD_WEAR_BOUND', default=1.5, cast=float)
RSSD_LOG_LEVEL = config('RSSD_LOG_LEVEL', default='INFO')


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{asctime} {levelname} {name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'rssd': {
            'handlers': ['console'],
            'level': RSSD_LOG_LEVEL,
            'propagate': False,
        },
    },
}
