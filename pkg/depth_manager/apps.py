from django.apps import AppConfig
from django.conf import settings


class DepthManagerConfig(AppConfig):
    name = 'depth_manager'
    verbose_name = 'Deep depth from focus'

    def ready(self):
        threads = getattr(settings, 'DDFF_TORCH_THREADS', None)
        if threads:
            import torch
            torch.set_num_threads(threads)
