"""
Test configuration for the kamtoolkit tests
"""

import os
import sys

import django
from django.conf import settings

# Add backend directory to Python path
backend_path = os.path.join(os.path.dirname(__file__), '..', 'backend')
sys.path.insert(0, backend_path)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', 'configs')

# Configure Django settings for testing
if not settings.configured:
    settings.configure(
        DEBUG=True,
        DATABASES={},
        INSTALLED_APPS=[
            'rest_framework',
            'aubry',
        ],
        SECRET_KEY='test-secret-key-for-testing-only',
        USE_TZ=True,
        REST_FRAMEWORK={
            'UNAUTHENTICATED_USER': None,
            'DEFAULT_AUTHENTICATION_CLASSES': [],
            'DEFAULT_PERMISSION_CLASSES': [],
        },
        TOOLKIT={
            'THREADS': 2,
            'SEED': 20240611,
            'OUTPUT_DIR': os.path.join(os.path.dirname(__file__), '..', 'kam-output-tests'),
            'LOG_LEVEL': 'ERROR',
        },
        LOGGING={
            'version': 1,
            'disable_existing_loggers': False,
            'handlers': {
                'console': {'class': 'logging.StreamHandler', 'stream': 'ext://sys.stderr'},
            },
            'loggers': {
                'aubry': {'handlers': ['console'], 'level': 'ERROR', 'propagate': False},
            },
        },
    )

# Setup Django
django.setup()
