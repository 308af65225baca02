from refinegan.app.main import main

main()
