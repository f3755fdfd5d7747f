"""
Dependency installer
Wasserstein DRMDP certification toolkit
Installs the packages listed in requirements.txt, optionally through a mirror
"""

import argparse
import os
import subprocess
import sys
from importlib import metadata
from typing import List, Tuple

REQUIREMENTS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), "requirements.txt")


class DependencyInstaller:
    """Dependency installer"""

    def __init__(self, requirements_file: str = REQUIREMENTS_FILE):
        self.python_executable = sys.executable
        self.pip_command = [self.python_executable, "-m", "pip"]
        self.requirements = self.read_requirements(requirements_file)

    @staticmethod
    def read_requirements(path: str) -> List[str]:
        with open(path, "r", encoding="utf-8") as handle:
            return [line.strip() for line in handle if line.strip() and not line.startswith("#")]

    def run_command(self, command: List[str], description: str) -> Tuple[bool, str]:
        """
        Run a command and report its outcome

        Args:
            command: argument list
            description: what the command does

        Returns:
            (success, output)
        """
        print(f"🔄 {description}...")
        try:
            result = subprocess.run(command, capture_output=True, text=True, check=True)
            print(f"✅ {description} succeeded")
            return True, result.stdout
        except subprocess.CalledProcessError as e:
            print(f"❌ {description} failed")
            print(f"error: {e.stderr}")
            return False, e.stderr

    def check_python_version(self) -> bool:
        version = sys.version_info
        print(f"🐍 Python {version.major}.{version.minor}.{version.micro}")
        if version < (3, 8):
            print("❌ Python 3.8 or newer is required")
            return False
        return True

    def get_package_version(self, requirement: str) -> str:
        name = requirement.split(">=")[0].split("==")[0]
        try:
            return metadata.version(name)
        except metadata.PackageNotFoundError:
            return "not installed"

    def display_installation_status(self) -> None:
        print("\n📊 Package status:")
        print("-" * 50)
        for requirement in self.requirements:
            name = requirement.split(">=")[0].split("==")[0]
            version = self.get_package_version(requirement)
            status = "❌" if version == "not installed" else "✅"
            print(f"{name:<15} {version:<15} {status}")
        print("-" * 50)

    def install(self, mirror_url: str = None) -> bool:
        command = self.pip_command + ["install"]
        if mirror_url:
            command += ["-i", mirror_url]
        success, _ = self.run_command(command + self.requirements, "installing requirements")
        return success


def main() -> int:
    parser = argparse.ArgumentParser(description="Install toolkit dependencies")
    parser.add_argument("--mirror", help="package index URL")
    parser.add_argument("--status", action="store_true", help="only show installed versions")
    args = parser.parse_args()

    installer = DependencyInstaller()
    if not installer.check_python_version():
        return 1
    if not args.status and not installer.install(args.mirror):
        return 1
    installer.display_installation_status()
    return 0


if __name__ == "__main__":
    sys.exit(main())
