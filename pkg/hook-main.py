from PyInstaller.utils.hooks import collect_data_files, collect_submodules

hiddenimports = collect_submodules("numba")
hiddenimports += collect_submodules("scipy.spatial")
hiddenimports += collect_submodules("scipy.special")
hiddenimports += collect_submodules("scipy.stats")
hiddenimports += collect_submodules("dcor")

# llvmlite ships its shared library as package data
datas = collect_data_files("llvmlite")
datas += collect_data_files("dcor")
