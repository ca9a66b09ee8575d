#!/usr/bin/env python3
"""
Setup script for the retrieval toolkit.
Creates working directories, the .env file and a sample run configuration.
"""

import json
import os
import shutil
import sys

SAMPLE_RUN_CONFIG = {
    "preset": "desk",
    "generator": {"n_questions": 4, "top_p": 0.95, "top_k": 10, "seed": 7},
    "trainer": {
        "encoder": {"embed_dim": 64, "hidden_dim": 128, "out_dim": 64, "vocab_hash_buckets": 32768, "seed": 0},
        "pretrain": {"batch_size": 32, "epochs": 6, "learning_rate": 0.001, "seed": 0},
        "finetune": {"batch_size": 32, "epochs": 20, "learning_rate": 0.001, "seed": 0},
    },
    "eval": {"ks": [1, 5, 20, 100], "depth": 100},
    "paths": {
        "passages": "artifacts/world/passages.jsonl",
        "bm25_index": "artifacts/bm25.json",
        "synthetic": "artifacts/synth.jsonl",
        "train_qa": "artifacts/world/train_qa.jsonl",
        "test_qa": "artifacts/world/test_qa.jsonl",
        "out_dir": "artifacts/checkpoints",
    },
}


def create_directory_structure():
    """Create necessary directories."""
    for directory in ['logs', 'artifacts']:
        os.makedirs(directory, exist_ok=True)
        print(f"✅ Created directory: {directory}")


def create_env_file():
    """Create .env file from template if it doesn't exist."""
    if not os.path.exists('.env'):
        if os.path.exists('.env.example'):
            shutil.copy('.env.example', '.env')
            print("✅ Created .env file from template")
        else:
            print("⚠️  .env.example not found, please create .env manually")
    else:
        print("ℹ️  .env file already exists")


def create_sample_run_config(path: str = 'run.json'):
    """Write a sample run configuration if there is none."""
    if os.path.exists(path):
        print(f"ℹ️  {path} already exists")
        return
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(SAMPLE_RUN_CONFIG, f, indent=2)
        f.write('\n')
    print(f"✅ Created sample {path}")


def check_python_version():
    if sys.version_info < (3, 9):
        print("❌ Python 3.9 or higher is required")
        sys.exit(1)
    print(f"✅ Python version: {sys.version.split()[0]}")


def check_dependencies() -> bool:
    """Check if required dependencies are installed."""
    package_imports = {
        'click': 'click',
        'python-dotenv': 'dotenv',
        'SQLAlchemy': 'sqlalchemy',
        'numpy': 'numpy',
    }

    missing_packages = []
    for package_name, import_name in package_imports.items():
        try:
            __import__(import_name)
        except ImportError:
            missing_packages.append(package_name)

    if missing_packages:
        print("❌ Missing required packages:")
        for package in missing_packages:
            print(f"   - {package}")
        print(f"\n🔧 Install them with:\n   pip install {' '.join(missing_packages)}")
        return False

    print("✅ All required dependencies are installed")
    return True


def display_next_steps():
    print("\n" + "=" * 60)
    print("🎉 Setup complete. A desk-scale pipeline:")
    print("=" * 60)
    print("   python main.py toyworld --seed 0 --out-dir artifacts/world")
    print("   python main.py index-bm25 --passages artifacts/world/passages.jsonl --out artifacts/bm25.json")
    print("   python main.py generate --passages artifacts/world/passages.jsonl --bm25 artifacts/bm25.json \\")
    print("       --seed 7 --out artifacts/synth.jsonl")
    print("   python main.py train --config run.json --stage both --baseline")
    print("   python main.py matrix --config run.json --sizes 100,200,400 --seeds 1,2,3,4,5")
    print("\n🧪 Run tests: pytest -v")


def main():
    print("🔧 Setting up the retrieval toolkit...")
    print("=" * 40)
    check_python_version()
    create_directory_structure()
    create_env_file()
    create_sample_run_config()
    if check_dependencies():
        display_next_steps()
    else:
        print("\n❌ Setup incomplete due to missing dependencies")
        sys.exit(1)


if __name__ == '__main__':
    main()
