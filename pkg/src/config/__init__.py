# Configuration module
from .config_manager import (
    CampaignConfig,
    ConfigManager,
    ConfigurationValidationError,
    MetricsOptions,
    SweepOptions,
)

__all__ = ['CampaignConfig', 'ConfigManager', 'ConfigurationValidationError', 'MetricsOptions', 'SweepOptions']
