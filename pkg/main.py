#!/usr/bin/env python3
"""
lobekit - pulmonary lobe segmentation toolkit
Entry point
"""

import sys

from lobekit.cli import main

if __name__ == '__main__':
    sys.exit(main())
