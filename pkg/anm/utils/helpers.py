"""Вспомогательные функции: хеши, контрольные суммы и производные сиды.

Этот модуль содержит утилиты, общие для всех подсистем:
стабильные хеши конфигураций, контрольные суммы массивов
и детерминированное получение сидов для отдельных прогонов.
"""

import hashlib
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any

import numpy as np


# Длина короткого хеша, используемого в идентификаторах артефактов
SHORT_HASH_LEN = 12


def _canonical(obj: Any) -> Any:
    if is_dataclass(obj) and not isinstance(obj, type):
        return _canonical(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj: Any) -> str:
    """Сериализует объект в канонический JSON (сортированные ключи, без пробелов)."""
    return json.dumps(_canonical(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    """Генерирует стабильный хеш конфигурации.

    Использует SHA256 от канонического JSON-представления, поэтому
    одинаковые конфигурации дают одинаковый хеш на любой платформе.

    Параметры:
        obj (Any): dataclass, словарь или список с примитивными значениями

    Возвращает:
        str: 64-символьный хеш SHA256 в шестнадцатеричном формате

    Пример:
        config_hash({"epsilon": 0.0627, "epochs": 10})
        # Returns: '3f1c...' (64 символа)
    """
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def array_checksum(*arrays: np.ndarray | None) -> str:
    """Контрольная сумма SHA256 по содержимому, форме и типу массивов.

    Отсутствующие массивы (None) учитываются как отдельный маркер,
    чтобы набор без меток не совпадал с набором с пустыми метками.
    """
    digest = hashlib.sha256()
    for arr in arrays:
        if arr is None:
            digest.update(b"<none>")
            continue
        contiguous = np.ascontiguousarray(arr)
        digest.update(str(contiguous.dtype.str).encode())
        digest.update(str(contiguous.shape).encode())
        digest.update(contiguous.tobytes())
    return digest.hexdigest()


def short_hash(full_hash: str) -> str:
    return full_hash[:SHORT_HASH_LEN]


def derive_seed(base: int, *parts: int | str) -> int:
    """Получает детерминированный сид для подзадачи из базового сида.

    Строковые части превращаются в числа через SHA256, затем всё
    смешивается через numpy.random.SeedSequence.

    Параметры:
        base (int): базовый (глобальный) сид
        *parts (int | str): идентификаторы подзадачи (индекс, имя метода, ...)

    Возвращает:
        int: 32-битный сид
    """
    entropy = [int(base)]
    for part in parts:
        if isinstance(part, str):
            entropy.append(int(hashlib.sha256(part.encode()).hexdigest()[:8], 16))
        else:
            entropy.append(int(part))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def checksum_seed(checksum: str) -> int:
    """Число из первых 8 hex-символов контрольной суммы."""
    return int(checksum[:8], 16)


def write_config_snapshot(output: str | Path, resolved: dict[str, Any]) -> Path:
    """Сохраняет разрешённую конфигурацию рядом с результатом запуска.

    Файл называется `<output>.config.json` и содержит хеш конфигурации,
    по которому запуск можно повторить байт-в-байт.
    """
    output = Path(output)
    snapshot = output.with_name(output.name + ".config.json")
    snapshot.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config_hash": config_hash(resolved), "config": _canonical(resolved)}
    snapshot.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return snapshot
