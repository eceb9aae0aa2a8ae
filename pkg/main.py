#!/usr/bin/env python3
"""Точка входа в приложение."""

import sys

from credential_hub.cli.interface import CLI


def main():
    cli = CLI()
    sys.exit(cli.run(sys.argv[1:]))


if __name__ == "__main__":
    main()
