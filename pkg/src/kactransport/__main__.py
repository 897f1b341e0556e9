from kactransport.cli import main

main()
