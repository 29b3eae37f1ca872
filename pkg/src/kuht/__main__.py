import sys

from kuht.cli import main

sys.exit(main())
