import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'bhk_lab.settings')
django.setup()
