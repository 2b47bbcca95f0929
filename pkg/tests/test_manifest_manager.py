"""
运行清单测试
"""

import hashlib
import json

import pytest

from manifest_manager import ChecksumError, ManifestManager, RunManifest, file_digest


@pytest.fixture
def manager(tmp_path):
    return ManifestManager(str(tmp_path))


def test_file_digest(tmp_path):
    path = tmp_path / 'data.csv'
    path.write_bytes(b'x,p\n0,1\n')
    assert file_digest(str(path)) == hashlib.sha256(b'x,p\n0,1\n').hexdigest()


def test_write_and_load(manager, tmp_path):
    source = tmp_path / 'chain.csv'
    source.write_text('symbol\n', encoding='utf-8')
    output = tmp_path / 'result.json'
    output.write_text('{}', encoding='utf-8')

    manifest = manager.create('calibrate', {'gamma': 0.02}, [str(source)])
    manager.record_output(manifest, str(output))
    path = manager.write(manifest)

    assert path.endswith('calibrate.manifest.json')
    loaded = manager.load(path)
    assert loaded == manifest
    assert loaded.inputs == {'chain.csv': file_digest(str(source))}
    assert loaded.outputs == {'result.json': file_digest(str(output))}


def test_tampered_manifest_rejected(manager):
    path = manager.write(manager.create('price', {'gamma': 0.02}))
    with open(path, 'r', encoding='utf-8') as f:
        package = json.load(f)
    package['manifest']['config']['gamma'] = 0.03
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(package, f)

    with pytest.raises(ChecksumError):
        manager.load(path)


def test_invalid_format(manager, tmp_path):
    path = tmp_path / 'bogus.json'
    path.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ValueError):
        manager.load(str(path))


def test_reproducibility_key_ignores_timestamp_and_outputs():
    first = RunManifest('plateau', {'n_samples': 1024}, timestamp=1)
    second = RunManifest('plateau', {'n_samples': 1024}, outputs={'scan.csv': 'abc'}, timestamp=2)
    third = RunManifest('plateau', {'n_samples': 2048}, timestamp=1)
    assert first.reproducibility_key() == second.reproducibility_key()
    assert first.reproducibility_key() != third.reproducibility_key()
