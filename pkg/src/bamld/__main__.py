import sys

from bamld.cli import main

sys.exit(main())
