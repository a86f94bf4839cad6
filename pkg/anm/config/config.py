"""Конфигурация и параметры приложения.

Модуль для загрузки настроек среды выполнения из `.env` и
конфигураций экспериментов из текстовых файлов KEY=VALUE.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Any

from dotenv import dotenv_values
from environs import Env, EnvError

from anm.attack.pgd import AttackConfig, TargetPolicy
from anm.campaign.runner import METHODS, CampaignConfig
from anm.errors import MissingArtifactError, ValidationError
from anm.trainer.trainer import HEAD_DEFAULTS, PRETRAIN_DEFAULTS, TrainConfig


@dataclass
class PathSettings:
    """Каталоги запуска.

    Атрибуты:
        artifact_dir (Path): каталог для моделей, наборов данных и отчётов
    """
    artifact_dir: Path


@dataclass
class LogSettings:
    """Настройки логирования.

    Атрибуты:
        path (Path): файл ротируемого лога
        level (str): уровень логирования (DEBUG, INFO, ...)
    """
    path: Path
    level: str


@dataclass
class DbSettings:
    """Настройки журнала запусков.

    Атрибуты:
        url (str): URL async SQLAlchemy, например sqlite+aiosqlite:///artifacts/anm.db
    """
    url: str


@dataclass
class Settings:
    """Главная конфигурация приложения.

    Атрибуты:
        paths (PathSettings): каталоги
        logging (LogSettings): логирование
        db (DbSettings): база данных журнала запусков
        workers (int): число процессов для независимых ячеек кампании
    """
    paths: PathSettings
    logging: LogSettings
    db: DbSettings
    workers: int


def load_settings(path: str | None = None) -> Settings:
    """Загружает настройки из переменных окружения.

    Читает файл .env и извлекает используемые переменные:
    - ANM_ARTIFACT_DIR: каталог артефактов (artifacts)
    - ANM_LOG_PATH: файл лога (<artifact dir>/anm.log)
    - ANM_LOG_LEVEL: уровень логирования (INFO)
    - ANM_DB_URL: URL базы (sqlite+aiosqlite:///<artifact dir>/anm.db)
    - ANM_WORKERS: число процессов (1)

    Параметры:
        path (str | None): Путь к файлу .env.
                          Если None, использует .env в текущей директории.

    Возвращает:
        Settings: Объект конфигурации с загруженными параметрами

    Примеры .env файла:
        ANM_ARTIFACT_DIR=artifacts
        ANM_LOG_LEVEL=DEBUG
        ANM_WORKERS=4
    """

    env: Env = Env()
    env.read_env(path)

    with env.prefixed("ANM_"):
        artifact_dir = env.path("ARTIFACT_DIR", Path("artifacts"))
        settings = Settings(
            paths=PathSettings(artifact_dir=artifact_dir),
            logging=LogSettings(
                path=env.path("LOG_PATH", artifact_dir / "anm.log"),
                level=env.str("LOG_LEVEL", "INFO").upper(),
            ),
            db=DbSettings(url=env.str("DB_URL", f"sqlite+aiosqlite:///{artifact_dir / 'anm.db'}")),
            workers=env.int("WORKERS", 1),
        )
    if settings.workers < 1:
        raise ValidationError(f"ANM_WORKERS must be >= 1, got {settings.workers}")
    return settings


def _read_experiment_file(path: str | Path | None) -> dict[str, str]:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(str(path))
    return {key: value for key, value in dotenv_values(path).items() if value is not None}


class FileEnv(Env):
    """Env, читающий значения из словаря вместо os.environ.

    Парсеры environs (int, float, list, bool) работают как обычно,
    окружение процесса не читается и не изменяется.
    """

    def __init__(self, values: dict[str, str]) -> None:
        super().__init__()
        self._values = dict(values)

    def _get_from_environ(self, key: str, default: Any, *, proxied: bool = False) -> tuple[str, Any, None]:
        return key, self._values.get(key, default), None


def _typed(path: str | Path | None, build: Any) -> Any:
    """Выполняет `build(env)` только на значениях файла эксперимента."""
    env = FileEnv(_read_experiment_file(path))
    try:
        return build(env)
    except (EnvError, ValueError, TypeError) as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def _fraction(env: Env, name: str, default: float) -> float:
    """Число или дробь вида 16/255."""
    raw = env.str(name, "")
    if not raw:
        return default
    numerator, _, denominator = raw.partition("/")
    return float(numerator) / float(denominator) if denominator else float(numerator)


def _train_config(env: Env, defaults: TrainConfig) -> TrainConfig:
    return TrainConfig(
        lr=env.float("LR", defaults.lr),
        epochs=env.int("EPOCHS", defaults.epochs),
        batch_size=env.int("BATCH_SIZE", defaults.batch_size),
        momentum=env.float("MOMENTUM", defaults.momentum),
        seed=env.int("SEED", defaults.seed),
        freeze=env.str("FREEZE", defaults.freeze),
    )


def load_train_config(path: str | Path | None = None, stage: str = "pretrain") -> TrainConfig:
    """Конфигурация обучения: ключи LR, EPOCHS, BATCH_SIZE, MOMENTUM, SEED, FREEZE.

    Параметры:
        path (str | Path | None): файл KEY=VALUE; None означает значения по умолчанию
        stage (str): pretrain или finetune (выбирает значения по умолчанию)
    """
    defaults = HEAD_DEFAULTS if stage == "finetune" else PRETRAIN_DEFAULTS
    return _typed(path, lambda env: _train_config(env, defaults))


def _attack_config(env: Env) -> AttackConfig:
    defaults = AttackConfig()
    epsilon = _fraction(env, "EPSILON", defaults.epsilon)
    step0 = _fraction(env, "STEP0", 0.0) or None
    kind = env.str("TARGET_POLICY", "sigma-multiple")
    target = TargetPolicy(
        kind=kind,
        k=env.float("TARGET_K", 10.0),
        value=env.float("TARGET_VALUE", None) if kind == "direct" else None,
    )
    return AttackConfig(
        epsilon=epsilon,
        step0=step0,
        n_drop=env.int("N_DROP", defaults.n_drop),
        epochs=env.int("EPOCHS", defaults.epochs),
        batch_size=env.int("BATCH_SIZE", defaults.batch_size),
        target=target,
        k_neurons=env.int("K_NEURONS", defaults.k_neurons),
        seed=env.int("SEED", defaults.seed),
    )


def load_attack_config(path: str | Path | None = None) -> AttackConfig:
    """Конфигурация атаки.

    Ключи: EPSILON (число или дробь 16/255), STEP0 (по умолчанию 4·EPSILON),
    N_DROP, EPOCHS, BATCH_SIZE, TARGET_POLICY (sigma-multiple | direct),
    TARGET_K, TARGET_VALUE, K_NEURONS, SEED.
    """
    return _typed(path, _attack_config)


def load_campaign_config(path: str | Path) -> CampaignConfig:
    """Конфигурация кампании.

    Ключи: SOURCES, VICTIMS, TESTSETS (списки через запятую), GENERATION,
    METHODS, PERTURBATIONS, SEED, OUT_DIR, ATTACK_CONFIG (путь к файлу атаки),
    SEED_NEURON_POLICY, NOISE_BASELINE. Относительные пути считаются от
    каталога файла кампании.
    """
    if not Path(path).exists():
        raise MissingArtifactError(str(path))
    base = Path(path).parent

    def resolve(item: str) -> str:
        return str(Path(item) if Path(item).is_absolute() else base / item)

    def build(env: Env) -> dict[str, Any]:
        return dict(
            sources=tuple(resolve(p) for p in env.list("SOURCES", [])),
            victims=tuple(resolve(p) for p in env.list("VICTIMS", [])),
            testsets=tuple(resolve(p) for p in env.list("TESTSETS", [])),
            generation=resolve(env.str("GENERATION")),
            methods=tuple(env.list("METHODS", list(METHODS))),
            perturbations=env.int("PERTURBATIONS", 10),
            seed=env.int("SEED", 0),
            out_dir=resolve(env.str("OUT_DIR", "campaign")),
            attack_path=env.str("ATTACK_CONFIG", ""),
            seed_neuron_policy=env.str("SEED_NEURON_POLICY", "random"),
            noise_baseline=env.bool("NOISE_BASELINE", True),
        )

    fields = _typed(path, build)
    attack_path = fields.pop("attack_path")
    attack = load_attack_config(resolve(attack_path) if attack_path else None)
    try:
        return CampaignConfig(**fields, attack=attack)
    except TypeError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
