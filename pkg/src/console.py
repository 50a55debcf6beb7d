"""Coloured console output shared by the pipeline and the numerical modules."""
from colorama import Fore, Style, init

# Initialize colorama for colored output
init(autoreset=True)

_quiet = False
_warned: set[str] = set()


def set_quiet(quiet: bool) -> None:
    """Silence step/progress output (warnings are still printed)."""
    global _quiet
    _quiet = quiet


def banner(title: str) -> None:
    if _quiet:
        return
    print(f"\n{Fore.CYAN}{'='*60}")
    print(f"{Fore.CYAN}{title}")
    print(f"{Fore.CYAN}{'='*60}\n")


def step(message: str) -> None:
    if not _quiet:
        print(f"{Fore.YELLOW}{message}")


def ok(message: str) -> None:
    if not _quiet:
        print(f"{Fore.GREEN}  ✓ {message}")


def info(message: str) -> None:
    if not _quiet:
        print(f"  {message}")


def fail(message: str) -> None:
    print(f"{Fore.RED}  ✗ {message}")


def warn(message: str, once: bool = True) -> None:
    """Print a warning; repeated messages are shown once per process."""
    if once:
        if message in _warned:
            return
        _warned.add(message)
    print(f"{Fore.YELLOW}  ⚠ {message}{Style.RESET_ALL}")
