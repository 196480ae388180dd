"""
System test script to verify the numerical core is working correctly

Run this after setup to ensure the installed numpy / scipy stack behaves.

Usage:
    python scripts/test_system.py [--full]
"""

import sys
sys.path.append('.')

import logging

from arscale.core.config import settings
from arscale.services.property_suite import format_table, run_property_suite

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


def test_imports():
    """Test all required imports"""
    print("\n🧪 Testing Python Imports...")

    imports = [
        ("numpy", "linalg"),
        ("scipy.sparse.linalg", "LinearOperator"),
        ("scipy.stats", "linregress"),
        ("pandas", "DataFrame"),
        ("matplotlib", "pyplot"),
        ("joblib", "Parallel"),
        ("arscale.cli", "main"),
    ]

    all_good = True
    for module, item in imports:
        try:
            exec(f"from {module} import {item}")
            print(f"  ✅ {module}.{item}")
        except Exception as e:
            print(f"  ❌ {module}.{item} - {e}")
            all_good = False

    return all_good


def test_settings():
    """Test settings load with sane values"""
    print("\n🧪 Testing Settings...")
    checks = [
        ("DENSE_CAP", settings.DENSE_CAP > 0),
        ("FIT_MAX_ITERS", settings.FIT_MAX_ITERS > 0),
        ("SWEEP_WORKERS", settings.SWEEP_WORKERS >= 1),
        ("STEP_SAFETY", 0 < settings.STEP_SAFETY < 1),
    ]
    all_good = True
    for name, ok in checks:
        print(f"  {'✅' if ok else '❌'} {name}={getattr(settings, name)}")
        all_good = all_good and ok
    return all_good


def main():
    """Run all tests"""
    print("\n" + "=" * 60)
    print("🚀 ARSCALE - SYSTEM TEST")
    print("=" * 60)

    results = {
        "Imports": test_imports(),
        "Settings": test_settings(),
    }
    report = run_property_suite(quick="--full" not in sys.argv)
    print(format_table(report))
    results["Property Suite"] = report.passed

    print("\n" + "=" * 60)
    print("📊 TEST SUMMARY")
    print("=" * 60)
    for test_name, passed in results.items():
        status = "✅ PASS" if passed else "❌ FAIL"
        print(f"  {status} - {test_name}")

    all_passed = all(results.values())
    print("\n" + "=" * 60)
    if all_passed:
        print("✅ ALL TESTS PASSED - System is ready!")
        print("\nNext steps:")
        print("  1. Run the unit tests: pytest")
        print("  2. Try a sweep: python main.py sweep --preset appendix-e-desk --out results.csv")
    else:
        print("❌ SOME TESTS FAILED - Please fix issues above")
        print("\nCommon fixes:")
        print("  - Install missing packages: pip install -r requirements.txt")
        print("  - Check .env for ARSCALE_* overrides")
    print("=" * 60 + "\n")
    return 0 if all_passed else 2


if __name__ == "__main__":
    sys.exit(main())
