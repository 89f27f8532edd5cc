"""Run configuration: settings defaults, then command-line flags, then a KEY=VALUE run file.

The run file uses the same env-file format decouple reads for .env, with the
upper-cased field names as keys::

    GEOMETRY=1,1,32,16,64
    SEED=7
    VAULT_MODE=local
"""
import dataclasses
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path

from decouple import RepositoryEnv, strtobool
from django.conf import settings
from django.core.exceptions import ValidationError

from .device import DeviceConfig
from .frames import COMPRESSORS, DeviceKey
from .ftl import GcPolicy
from .harness import ATTACKS
from .nand import Geometry

logger = logging.getLogger(__name__)

CONFIG_FILE_NAME = 'run_config.env'
KEY_FILE_NAME = 'device.key'
VAULT_MODES = ('local', 'remote', 'disabled')
TRIMMING_MODES = ('copy', 'in_place')
NS_PER_S = 1_000_000_000


def _bool(value):
    if isinstance(value, bool):
        return value
    return bool(strtobool(str(value)))


@dataclass
class RunConfig:
    geometry: str = '2,2,128,64,4096'
    over_provisioning: float = 0.25
    gc_high_watermark: float = 0.20
    offload_watermark: float = 0.30
    seal_max_entries: int = 1024
    seal_max_age_s: int = 300
    segment_max_pages: int = 256
    compression: str = 'zlib'
    logging: bool = True
    retention: bool = True
    log_reads: bool = False
    vault_mode: str = 'local'
    vault_host: str = '127.0.0.1'
    vault_port: int = 7878
    vault_root: str = ''
    vault_timeout_s: float = 5.0
    key_file: str = ''
    trace: str = ''
    ops: int = 2000
    ops_per_second: float = 200.0
    attack: str = ''
    ablation: bool = False
    victim_fraction: float = 0.25
    fill_fraction: float = 0.95
    attack_rate: float = 2000.0
    ops_per_minute: float = 10.0
    trimming_mode: str = 'copy'
    days: int = 0
    daily_passes: float = 2.0
    wear_bound: float = 1.5
    seed: int = 1
    output_dir: str = ''

    @classmethod
    def from_settings(cls):
        return cls(
            geometry=settings.RSSD_GEOMETRY,
            over_provisioning=settings.RSSD_OVER_PROVISIONING,
            gc_high_watermark=settings.RSSD_GC_HIGH_WATERMARK,
            offload_watermark=settings.RSSD_OFFLOAD_WATERMARK,
            seal_max_entries=settings.RSSD_SEAL_MAX_ENTRIES,
            seal_max_age_s=settings.RSSD_SEAL_MAX_AGE_S,
            segment_max_pages=settings.RSSD_SEGMENT_MAX_PAGES,
            compression=settings.RSSD_COMPRESSION,
            vault_mode=settings.RSSD_VAULT_MODE,
            vault_host=settings.RSSD_VAULT_HOST,
            vault_port=settings.RSSD_VAULT_PORT,
            vault_root=settings.RSSD_VAULT_ROOT,
            vault_timeout_s=settings.RSSD_VAULT_TIMEOUT_S,
            wear_bound=settings.RSSD_WEAR_BOUND,
            seed=settings.RSSD_SEED,
        )

    @classmethod
    def layered(cls, flags=None, config_file=None):
        """Settings defaults, overridden by flags that were given, overridden by config_file."""
        config = cls.from_settings()
        names = {f.name for f in fields(cls)}
        overrides = {k: v for k, v in (flags or {}).items() if k in names and v is not None}
        config = dataclasses.replace(config, **config._cast_all(overrides))
        if config_file:
            config = config.merged_file(config_file)
        return config

    def merged_file(self, path):
        if not os.path.isfile(path):
            raise ValidationError(f"config file {path} does not exist")
        repository = RepositoryEnv(path)
        values = {}
        for f in fields(self):
            key = f.name.upper()
            if key in repository.data:
                values[f.name] = repository[key]
        unknown = sorted(k for k in repository.data if k.lower() not in values
                         and k not in ('DEVICE_KEY_FINGERPRINT',))
        if unknown:
            raise ValidationError([f"unknown config key {k}" for k in unknown])
        return dataclasses.replace(self, **self._cast_all(values))

    def _cast_all(self, values):
        casts = {f.name: f.type for f in fields(self)}
        out = {}
        errors = []
        for name, value in values.items():
            cast = casts[name]
            try:
                if cast in (bool, 'bool'):
                    out[name] = _bool(value)
                elif cast in (int, 'int'):
                    out[name] = int(value)
                elif cast in (float, 'float'):
                    out[name] = float(value)
                else:
                    out[name] = str(value)
            except (TypeError, ValueError):
                errors.append(f"{name}: cannot read {value!r}")
        if errors:
            raise ValidationError(errors)
        return out

    # Validation

    def validate(self, command=None):
        """Raise ValidationError listing every problem with this configuration."""
        errors = []
        try:
            geometry = Geometry.parse(self.geometry)
        except ValueError as exc:
            errors.append(f"geometry: {exc}")
            geometry = None
        try:
            GcPolicy(self.gc_high_watermark, self.offload_watermark)
        except ValueError as exc:
            errors.append(str(exc))
        if not 0 < self.over_provisioning < 1:
            errors.append("over_provisioning must be between 0 and 1")
        elif geometry is not None:
            spare = geometry.total_pages - int(geometry.total_pages * (1 - self.over_provisioning))
            if spare < 2 * geometry.pages_per_block:
                errors.append("over_provisioning must leave at least two blocks of spare capacity")
        if self.seal_max_entries < 1:
            errors.append("seal_max_entries must be at least 1")
        if self.seal_max_age_s < 1:
            errors.append("seal_max_age_s must be at least 1")
        if self.segment_max_pages < 1:
            errors.append("segment_max_pages must be at least 1")
        if self.compression not in COMPRESSORS:
            errors.append(f"compression must be one of {', '.join(COMPRESSORS)}")
        if self.vault_mode not in VAULT_MODES:
            errors.append(f"vault_mode must be one of {', '.join(VAULT_MODES)}")
        if self.vault_mode != 'disabled' and not (self.retention and self.logging):
            errors.append("a vault needs both retention and logging enabled")
        if not 0 < self.vault_port < 65536:
            errors.append("vault_port must be between 1 and 65535")
        if self.vault_timeout_s <= 0:
            errors.append("vault_timeout_s must be positive")
        if self.vault_mode == 'remote' and not (settings.RSSD_DEVICE_KEY or self.key_file):
            errors.append("remote vault mode needs RSSD_DEVICE_KEY or key_file")
        if self.trace and not os.path.isfile(self.trace):
            errors.append(f"trace file {self.trace} does not exist")
        if self.ops < 0:
            errors.append("ops must not be negative")
        if self.ops_per_second <= 0:
            errors.append("ops_per_second must be positive")
        if self.attack and self.attack not in ATTACKS:
            errors.append(f"attack must be one of {', '.join(ATTACKS)}")
        if command == 'attack' and not self.attack:
            errors.append("attack is required")
        if not 0 <= self.victim_fraction <= 1:
            errors.append("victim_fraction must be between 0 and 1")
        if not 0 <= self.fill_fraction <= 1:
            errors.append("fill_fraction must be between 0 and 1")
        if self.attack_rate <= 0:
            errors.append("attack_rate must be positive")
        if self.ops_per_minute < 0:
            errors.append("ops_per_minute must not be negative")
        if self.trimming_mode not in TRIMMING_MODES:
            errors.append(f"trimming_mode must be one of {', '.join(TRIMMING_MODES)}")
        if self.days < 0:
            errors.append("days must not be negative")
        if self.daily_passes <= 0:
            errors.append("daily_passes must be positive")
        if self.wear_bound <= 0:
            errors.append("wear_bound must be positive")
        if self.output_dir and (Path(self.output_dir) / CONFIG_FILE_NAME).exists():
            errors.append(f"{self.output_dir} already holds a run")
        if errors:
            raise ValidationError(errors)
        return self

    # Derived objects

    @property
    def parsed_geometry(self):
        return Geometry.parse(self.geometry)

    def device_config(self, retention=None, logging=None):
        retention = self.retention if retention is None else retention
        logging = self.logging if logging is None else logging
        return DeviceConfig(
            geometry=self.parsed_geometry,
            over_provisioning=self.over_provisioning,
            policy=GcPolicy(self.gc_high_watermark, self.offload_watermark),
            retention=retention,
            logging=logging,
            log_reads=self.log_reads and logging,
            seal_max_entries=self.seal_max_entries,
            seal_max_age_ns=self.seal_max_age_s * NS_PER_S,
            segment_max_pages=self.segment_max_pages,
            compression=COMPRESSORS[self.compression],
        )

    def vault_dir(self):
        """Where an in-process vault keeps its segments; a fresh vault per run by default."""
        if self.vault_root:
            return Path(self.vault_root)
        return Path(self.output_dir) / 'vault'

    def load_key(self, create=False):
        """The device key: RSSD_DEVICE_KEY, else key_file, else <vault dir>/device.key."""
        if settings.RSSD_DEVICE_KEY:
            return DeviceKey.from_hex(settings.RSSD_DEVICE_KEY)
        path = Path(self.key_file) if self.key_file else self.vault_dir() / KEY_FILE_NAME
        if path.exists():
            return DeviceKey.from_hex(path.read_text())
        if not create:
            raise ValidationError(f"no device key at {path}")
        key = DeviceKey.generate()
        path.parent.mkdir(parents=True, exist_ok=True)
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o600)
        with os.fdopen(fd, 'w') as f:
            f.write(key.hex())
        logger.info("generated device key %s at %s", key.fingerprint, path)
        return key

    # Archive

    def to_env(self, key=None):
        lines = [f"{f.name.upper()}={getattr(self, f.name)}" for f in fields(self)]
        if key is not None:
            lines.append(f"DEVICE_KEY_FINGERPRINT={key.fingerprint}")
        return '\n'.join(lines) + '\n'

    def archive(self, directory, key=None):
        path = Path(directory) / CONFIG_FILE_NAME
        path.write_text(self.to_env(key))
        return path

    @classmethod
    def from_run_dir(cls, directory):
        """The configuration archived by a completed run."""
        path = Path(directory) / CONFIG_FILE_NAME
        if not path.exists():
            raise ValidationError(f"{directory} is not a run directory (no {CONFIG_FILE_NAME})")
        config = cls().merged_file(str(path))
        return dataclasses.replace(config, output_dir=str(directory))
