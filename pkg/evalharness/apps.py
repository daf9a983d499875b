from django.apps import AppConfig


class EvalharnessConfig(AppConfig):
    name = 'evalharness'
    verbose_name = 'Evaluation harness'
