//! File-descriptor table, console devices, and the I/O syscall wrappers.
//! fds 1 and 2 are permanently mapped to the stdout and stderr console
//! regions; there are no other descriptors.

use crate::abi::{errno, GETRANDOM_FILL, STAT_MODE_OFFSET, STAT_SIZE, S_IFCHR};
use crate::mem::{GuestMemory, DEVICE_STDERR, DEVICE_STDOUT};

/// Fixed descriptor table. fd 0 is absent; fds 1 and 2 resolve to the two
/// console devices from bootstrap to shutdown.
#[derive(Debug, Default)]
pub struct FdTable;

impl FdTable {
    pub fn new() -> FdTable {
        FdTable
    }

    pub fn device_for(&self, fd: u64) -> Option<u8> {
        match fd {
            1 => Some(DEVICE_STDOUT),
            2 => Some(DEVICE_STDERR),
            _ => None,
        }
    }
}

/// The 128-byte riscv64 `struct stat` image for a console device: st_mode
/// holds S_IFCHR, every other field is zero.
pub fn stat_image() -> [u8; STAT_SIZE] {
    let mut buf = [0u8; STAT_SIZE];
    buf[STAT_MODE_OFFSET..STAT_MODE_OFFSET + 4].copy_from_slice(&S_IFCHR.to_le_bytes());
    buf
}

/// sys_write: stream guest bytes to the console backing the descriptor.
pub fn sys_write(mem: &mut GuestMemory, io: &FdTable, fd: u64, buf: u64, len: u64) -> i64 {
    let Some(device) = io.device_for(fd) else {
        return -errno::EBADF;
    };
    if len == 0 {
        return 0;
    }
    let data = match mem.read_bytes(buf, len) {
        Ok(d) => d,
        Err(_) => return -errno::EFAULT,
    };
    mem.console_write(device, &data)
        .expect("console region is always mapped");
    len as i64
}

/// sys_writev: gathered write. iovecs are {base: u64, len: u64} records,
/// little-endian, applied strictly in order; a fault mid-sequence returns
/// -EFAULT with every earlier iovec already delivered.
pub fn sys_writev(mem: &mut GuestMemory, io: &FdTable, fd: u64, iov: u64, iovcnt: u64) -> i64 {
    let Some(device) = io.device_for(fd) else {
        return -errno::EBADF;
    };
    let cnt = iovcnt as i64;
    if !(0..=1024).contains(&cnt) {
        return -errno::EINVAL;
    }
    let mut total: i64 = 0;
    for i in 0..cnt as u64 {
        let rec = iov + i * 16;
        let (base, len) = match (mem.load_word(rec, 8), mem.load_word(rec + 8, 8)) {
            (Ok(b), Ok(l)) => (b, l),
            _ => return -errno::EFAULT,
        };
        if len == 0 {
            continue;
        }
        let data = match mem.read_bytes(base, len) {
            Ok(d) => d,
            Err(_) => return -errno::EFAULT,
        };
        mem.console_write(device, &data)
            .expect("console region is always mapped");
        total += len as i64;
    }
    total
}

/// sys_fstat: write the fixed character-device stat image.
pub fn sys_fstat(mem: &mut GuestMemory, io: &FdTable, fd: u64, statbuf: u64) -> i64 {
    if io.device_for(fd).is_none() {
        return -errno::EBADF;
    }
    match mem.write_bytes(statbuf, &stat_image()) {
        Ok(()) => 0,
        Err(_) => -errno::EFAULT,
    }
}

/// sys_getrandom: fill the buffer with the fixed dummy pattern and return
/// the requested length. Output is a pure function of len.
pub fn sys_getrandom(mem: &mut GuestMemory, buf: u64, len: u64, _flags: u64) -> i64 {
    if len == 0 {
        return 0;
    }
    match mem.fill(buf, len, GETRANDOM_FILL) {
        Ok(()) => len as i64,
        Err(_) => -errno::EFAULT,
    }
}

/// sys_clock_gettime: write the zero timespec {0 sec, 0 nsec}.
pub fn sys_clock_gettime(mem: &mut GuestMemory, _clockid: u64, tp: u64) -> i64 {
    match mem.write_bytes(tp, &[0u8; 16]) {
        Ok(()) => 0,
        Err(_) => -errno::EFAULT,
    }
}
