import sys

from ngrambug.cli import main

sys.exit(main())
