import json
import logging
import collections.abc
import copy
from pathlib import Path
from typing import Optional

from processing.cedos import DiffusionConfig
from processing.errors import ParameterError
from processing.phantoms_metrics import TubePhantomSpec
from processing.tubularity import TubularityConfig
from processing.wavelet_dft import CakeParams
from processing.wavelet_zernike import ZernikeParams

log = logging.getLogger(__name__)

# Bundled resources live next to this script.
_SCRIPT_DIR = Path(__file__).resolve().parent


class ConfigurationError(Exception):
    """Custom exception for configuration loading errors."""
    pass


def _deep_merge_dicts(base_dict: dict, override_dict: dict) -> dict:
    """
    Recursively merges override_dict into base_dict.
    If a key exists in both and both values are dicts, it recursively merges them.
    Otherwise, the value from override_dict takes precedence.
    Modifies base_dict in place and returns it.
    """
    for key, value in override_dict.items():
        if isinstance(value, collections.abc.Mapping):
            node = base_dict.get(key)
            if isinstance(node, collections.abc.Mapping):
                _deep_merge_dicts(node, value)
            else:
                base_dict[key] = value
        else:
            base_dict[key] = value
    return base_dict


class Configuration:
    """
    Loads core settings and merges a named preset over them.

    Precedence is CLI override > preset > core settings. Every section is
    validated by building the numeric dataclass it feeds.
    """
    CONFIG_SUBDIR_NAME = "config"
    PRESETS_DIR_NAME = "Presets"
    APP_SETTINGS_FILENAME = "app_settings.json"
    PRESET_META_KEYS = ("preset_name", "notes")
    SECTIONS = ("CAKE_WAVELET", "ZERNIKE_WAVELET", "TRANSFORM", "DIFFUSION", "TUBULARITY", "PHANTOM", "OUTPUT")

    def __init__(self, preset_name: str = "default", base_dir: Optional[Path] = None):
        """
        Args:
            preset_name: The name of the preset (without .json extension).
            base_dir: Directory holding config/ and Presets/. Defaults to the
                      directory of this module.
        Raises:
            ConfigurationError: If settings or the preset cannot be loaded/validated.
        """
        log.debug(f"Initializing Configuration with preset: '{preset_name}', base_dir: '{base_dir}'")
        self._preset_filename_stem = preset_name
        self.base_dir: Path = Path(base_dir) if base_dir else _SCRIPT_DIR

        app_settings_path = self.base_dir / self.CONFIG_SUBDIR_NAME / self.APP_SETTINGS_FILENAME
        self._core_settings: dict = self._load_json_file(
            app_settings_path, is_critical=True, description="Core application settings"
        )
        preset_path = self.base_dir / self.PRESETS_DIR_NAME / f"{preset_name}.json"
        self._preset_settings: dict = self._load_json_file(
            preset_path, is_critical=True, description=f"Preset '{preset_name}'"
        )
        self.actual_internal_preset_name = self._preset_settings.get("preset_name", preset_name)

        self._settings = copy.deepcopy(self._core_settings)
        overrides = {k: v for k, v in self._preset_settings.items() if k not in self.PRESET_META_KEYS}
        _deep_merge_dicts(self._settings, overrides)

        self._validate_configs()
        log.info(f"Configuration loaded successfully using preset: '{self.actual_internal_preset_name}'")

    def _load_json_file(self, file_path: Path, is_critical: bool = False, description: str = "configuration") -> dict:
        """Loads a JSON file, handling errors. Returns empty dict if not found and not critical."""
        log.debug(f"Attempting to load {description} from: {file_path}")
        if not file_path.is_file():
            if is_critical:
                raise ConfigurationError(f"Critical {description} file not found: {file_path}")
            log.info(f"{description} file not found: {file_path}. Returning empty dict.")
            return {}
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                settings = json.load(f)
        except json.JSONDecodeError as e:
            msg = f"Failed to parse {description} file {file_path}: Invalid JSON - {e}"
            if is_critical:
                raise ConfigurationError(msg)
            log.warning(msg + ". Returning empty dict.")
            return {}
        if not isinstance(settings, dict):
            raise ConfigurationError(f"{description} file {file_path} must hold a JSON object")
        log.debug(f"{description} loaded successfully from {file_path}.")
        return settings

    def _section(self, name: str) -> dict:
        return dict(self._settings.get(name, {}))

    def _validate_configs(self):
        """Builds every typed section once so that bad values fail at load time."""
        log.debug("Validating loaded configurations...")
        for name in self.SECTIONS:
            if not isinstance(self._settings.get(name), dict):
                raise ConfigurationError(f"Core config section '{name}' is missing or not a dictionary.")
        workers = self._settings.get("FFT_WORKERS", 1)
        if not isinstance(workers, int) or workers < 1:
            raise ConfigurationError(f"FFT_WORKERS must be a positive integer, got {workers!r}")
        try:
            # building each section runs its own validation
            self.cake_params
            self.zernike_params
            self.diffusion_config
            self.tubularity_config
            self.phantom_spec
        except (ParameterError, TypeError) as e:
            raise ConfigurationError(f"Preset '{self._preset_filename_stem}': {e}") from e
        if self.transform_settings.get("band_limit", 0) < 0:
            raise ConfigurationError("TRANSFORM.band_limit must be non-negative")
        pad = self.transform_settings.get("pad", 0)
        if pad != "auto" and (isinstance(pad, bool) or not isinstance(pad, int) or pad < 0):
            raise ConfigurationError(f"TRANSFORM.pad must be 'auto' or a non-negative integer, got {pad!r}")
        log.debug("Configuration validation passed.")

    def override(self, section: str, **values) -> None:
        """Applies CLI flag values (None means 'not given') over a section and re-validates."""
        if section not in self.SECTIONS:
            raise ConfigurationError(f"Unknown configuration section '{section}'")
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return
        log.debug(f"Overriding {section} with {given}")
        self._settings[section].update(given)
        self._validate_configs()

    @property
    def preset_name(self) -> str:
        return self.actual_internal_preset_name

    @property
    def app_version(self) -> str:
        return self._settings.get("APP_VERSION", "0.0.0")

    @property
    def fft_workers(self) -> int:
        return int(self._settings.get("FFT_WORKERS", 1))

    @property
    def cake_params(self) -> CakeParams:
        return CakeParams.from_dict(self._section("CAKE_WAVELET"))

    @property
    def zernike_params(self) -> ZernikeParams:
        return ZernikeParams.from_dict(self._section("ZERNIKE_WAVELET"))

    @property
    def diffusion_config(self) -> DiffusionConfig:
        return DiffusionConfig(**self._section("DIFFUSION"))

    @property
    def tubularity_config(self) -> TubularityConfig:
        return TubularityConfig(**self._section("TUBULARITY"))

    @property
    def phantom_spec(self) -> TubePhantomSpec:
        return TubePhantomSpec(**self.phantom_settings)

    @property
    def transform_settings(self) -> dict:
        return self._section("TRANSFORM")

    @property
    def phantom_settings(self) -> dict:
        return self._section("PHANTOM")

    @property
    def output_settings(self) -> dict:
        return self._section("OUTPUT")

    def as_dict(self) -> dict:
        """Effective settings after merging, for run manifests."""
        return copy.deepcopy(self._settings)


def get_available_preset_names(base_dir: Optional[Path] = None) -> list[str]:
    """Stems of Presets/*.json, sorted; names starting with '_' are templates and skipped."""
    presets_dir = (Path(base_dir) if base_dir else _SCRIPT_DIR) / Configuration.PRESETS_DIR_NAME
    if not presets_dir.is_dir():
        log.warning(f"No preset directory found at {presets_dir}")
        return []
    return sorted(f.stem for f in presets_dir.glob("*.json") if not f.stem.startswith("_"))
