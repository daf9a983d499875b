import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'sgplab.settings')
django.setup()
