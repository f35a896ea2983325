from django.apps import AppConfig


class AubryConfig(AppConfig):
    name = "aubry"
    verbose_name = "Weak KAM / Aubry-Mather toolkit"
