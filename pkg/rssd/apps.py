from django.apps import AppConfig


class RssdConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'rssd'
    verbose_name = 'Ransomware-aware SSD simulator'

    def ready(self):
        import rssd.detectors  # noqa: F401
