#!/usr/bin/env python3
"""
HTO (Heavy-Tailed Options) - 运行清单管理模块

这个模块为每次命令行运行写出一份 JSON 清单：命令、配置快照、输入文件摘要、工具版本与时间戳，
并用规范化 JSON 的校验和防止清单被改动。数值输出文件本身不含时间戳。
"""

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Optional

from config_manager import setup_logger

logger = setup_logger('HTO.ManifestManager', 'manifest_log.log')

TOOL_VERSION = '1.0.0'
SCHEMA_VERSION = 1


class ChecksumError(Exception):
    """校验和错误异常"""
    pass


@dataclass
class RunManifest:
    """单次运行的清单"""

    command: str
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    schema_version: int = SCHEMA_VERSION
    timestamp: int = 0

    def reproducibility_key(self) -> str:
        """不含时间戳和输出的摘要；相同的键应产生相同的数值输出"""
        payload = {'command': self.command, 'config': self.config, 'inputs': self.inputs,
                   'tool_version': self.tool_version, 'schema_version': self.schema_version}
        return _digest_text(_canonical(payload))


def _canonical(data: Dict[str, Any]) -> str:
    return json.dumps(data, ensure_ascii=False, separators=(',', ':'), sort_keys=True)


def _digest_text(text: str) -> str:
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def file_digest(path: str) -> str:
    """文件内容的 SHA-256"""
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            sha.update(block)
    return sha.hexdigest()


class ManifestManager:
    """清单管理器 - 负责清单的生成、写出与校验"""

    def __init__(self, output_dir: Optional[str] = None):
        """
        初始化清单管理器

        Args:
            output_dir (str): 清单目录，默认为当前目录
        """
        self._output_dir = output_dir or os.getcwd()
        os.makedirs(self._output_dir, exist_ok=True)

    def create(self, command: str, config: Dict[str, Any], input_files: Iterable[str] = ()) -> RunManifest:
        """
        创建清单并计算输入文件摘要

        Args:
            command (str): 子命令名称
            config (Dict[str, Any]): 配置快照
            input_files: 输入文件路径

        Returns:
            RunManifest: 新清单
        """
        inputs = {os.path.basename(p): file_digest(p) for p in input_files}
        return RunManifest(command=command, config=dict(config), inputs=inputs, timestamp=int(time.time()))

    def record_output(self, manifest: RunManifest, path: str) -> None:
        """登记一个输出文件及其摘要"""
        manifest.outputs[os.path.basename(path)] = file_digest(path)

    def write(self, manifest: RunManifest, name: Optional[str] = None) -> str:
        """
        写出清单文件

        Args:
            manifest (RunManifest): 清单
            name (str): 文件名，默认 '<command>.manifest.json'

        Returns:
            str: 清单文件路径
        """
        data = asdict(manifest)
        package = {
            'manifest': data,
            'checksum': _digest_text(_canonical(data)),
        }
        path = os.path.join(self._output_dir, name or f"{manifest.command}.manifest.json")
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(package, f, indent=2, ensure_ascii=False, sort_keys=True)
        logger.info(f"成功写出运行清单 {path}")
        return path

    def load(self, path: str) -> RunManifest:
        """
        读取并校验清单

        Raises:
            ChecksumError: 校验和不匹配
            ValueError: 格式无效
        """
        with open(path, 'r', encoding='utf-8') as f:
            package = json.load(f)

        if not isinstance(package, dict) or 'manifest' not in package or 'checksum' not in package:
            raise ValueError("无效的清单格式")

        data = package['manifest']
        calculated = _digest_text(_canonical(data))
        if calculated != package['checksum']:
            logger.error("校验和不匹配: 计算值=%s, 期望值=%s", calculated, package['checksum'])
            raise ChecksumError("清单校验失败，可能已被修改")
        return RunManifest(**data)
