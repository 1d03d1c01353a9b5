import sys

from hnnkam.cli import main

sys.exit(main())
