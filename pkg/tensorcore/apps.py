from django.apps import AppConfig


class TensorcoreConfig(AppConfig):
    name = 'tensorcore'
    verbose_name = 'Tensor core'
